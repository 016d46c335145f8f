fn main() {
    std::process::exit(mcf_cli::run(std::env::args_os()));
}
