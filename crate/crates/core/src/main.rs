fn main() {
    std::process::exit(fovea::cli::run());
}
