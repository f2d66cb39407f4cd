fn main() {
    std::process::exit(fabrictext_cli::dispatch(std::env::args_os()));
}
