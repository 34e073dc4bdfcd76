fn main() {
    std::process::exit(taxoseg::cli::run());
}
