//! `qnet` binary entry point.

fn main() {
    std::process::exit(qnet::cli::run(std::env::args_os()));
}
