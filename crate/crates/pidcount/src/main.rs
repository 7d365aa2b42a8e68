fn main() {
    std::process::exit(pidcount::cli::run());
}
