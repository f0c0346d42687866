fn main() {
    std::process::exit(rbon_cli::run(std::env::args_os()));
}
