fn main() {
    std::process::exit(reentrancy_cli::run(std::env::args_os()));
}
