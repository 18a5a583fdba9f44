#include <iostream>

#include "transporter/cli.hpp"

int main(int argc, char** argv)
{
    return transporter::cli::run(argc, argv, std::cout, std::cerr);
}
