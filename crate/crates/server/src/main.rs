fn main() {
    std::process::exit(structa::cli::run(std::env::args_os()));
}
