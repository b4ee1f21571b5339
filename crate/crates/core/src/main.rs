fn main() {
    std::process::exit(symgain::cli::cli_main(std::env::args_os()));
}
