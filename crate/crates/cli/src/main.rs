fn main() {
    std::process::exit(blocks_cli::dispatch(std::env::args_os()));
}
