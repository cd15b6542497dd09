fn main() {
    std::process::exit(camtax::cli::run(std::env::args_os()));
}
