fn main() {
    std::process::exit(survkan::cli::run(std::env::args_os()));
}
