fn main() {
    std::process::exit(rlab_cli::run(std::env::args_os()));
}
