fn main() {
    std::process::exit(regae::cli::run(std::env::args_os()));
}
