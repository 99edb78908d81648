fn main() {
    std::process::exit(leaderlens::run(std::env::args_os()));
}
