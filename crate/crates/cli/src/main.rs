fn main() {
    std::process::exit(mcwc_cli::run(std::env::args_os()));
}
