fn main() {
    std::process::exit(hagan::cli::run_cli(std::env::args_os()));
}
