fn main() {
    std::process::exit(cavity_readout::cli::run(std::env::args_os()));
}
