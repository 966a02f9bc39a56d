fn main() {
    std::process::exit(ovdprobe_cli::run(std::env::args_os()));
}
