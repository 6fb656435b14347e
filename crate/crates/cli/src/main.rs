fn main() {
    std::process::exit(fusetrack_cli::run_from(std::env::args_os()));
}
