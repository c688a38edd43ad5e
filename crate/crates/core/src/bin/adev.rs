fn main() {
    std::process::exit(adev::cli::dispatch(std::env::args_os()));
}
