fn main() {
    std::process::exit(maskworld::cli::run(std::env::args_os()));
}
