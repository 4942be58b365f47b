fn main() {
    std::process::exit(kerrwell_cli::run(std::env::args_os()));
}
