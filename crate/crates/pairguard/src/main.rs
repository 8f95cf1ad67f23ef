fn main() {
    std::process::exit(pairguard::cli::run());
}
