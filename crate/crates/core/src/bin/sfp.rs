fn main() {
    std::process::exit(streaming_flow::cli::dispatch(std::env::args_os()));
}
