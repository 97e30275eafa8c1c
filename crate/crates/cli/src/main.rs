fn main() {
    std::process::exit(megsim_cli::run(std::env::args_os()));
}
