#include "commands.hpp"

int main(int argc, char** argv) {
    pafuse::cli::configure_logging();
    std::vector<std::string> args(argv + 1, argv + argc);
    const auto result = pafuse::cli::run_cli(args, std::cout);
    if (result.code != pafuse::cli::kOk) std::cerr << "pafuse: " << result.message << "\n";
    return result.code;
}
