fn main() {
    std::process::exit(isokv_cli::run(std::env::args_os()));
}
