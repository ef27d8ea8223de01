use clap::Parser;

fn main() {
    let cli = wtmoments::Cli::parse();
    std::process::exit(wtmoments::run(&cli));
}
