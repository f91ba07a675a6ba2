fn main() {
    std::process::exit(envtts::cli::cli_main(std::env::args_os()));
}
