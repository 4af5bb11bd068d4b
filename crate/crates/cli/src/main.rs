fn main() {
    std::process::exit(ppsync_cli::main_with(std::env::args_os()));
}
