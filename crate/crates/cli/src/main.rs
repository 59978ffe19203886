fn main() {
    std::process::exit(smoothlab_cli::run(std::env::args_os()));
}
