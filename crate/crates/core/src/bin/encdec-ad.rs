fn main() {
    std::process::exit(encdec_ad::cli::main());
}
