fn main() {
    std::process::exit(prosr::cli::run());
}
