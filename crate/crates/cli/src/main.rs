fn main() {
    std::process::exit(sketchforge_cli::run(std::env::args_os()));
}
