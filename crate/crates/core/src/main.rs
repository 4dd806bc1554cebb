fn main() {
    std::process::exit(failpred::cli::dispatch(std::env::args()));
}
