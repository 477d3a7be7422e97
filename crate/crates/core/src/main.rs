fn main() {
    std::process::exit(trace_matcher::cli::run(std::env::args_os()));
}
