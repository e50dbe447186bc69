fn main() {
    std::process::exit(insens_cli::run(std::env::args_os()));
}
