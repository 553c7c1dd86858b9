fn main() {
    std::process::exit(hardgate::cli::run(std::env::args_os()));
}
