fn main() {
    std::process::exit(spice::run(std::env::args_os()));
}
