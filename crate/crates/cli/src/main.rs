fn main() {
    std::process::exit(spikeleak_cli::run(std::env::args_os()));
}
