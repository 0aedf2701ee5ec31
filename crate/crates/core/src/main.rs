fn main() {
    std::process::exit(scanbench::cli_main(std::env::args()));
}
