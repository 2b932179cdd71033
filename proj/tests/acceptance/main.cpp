// Acceptance suite: one PASS/FAIL line per criterion.
//
//   safeshield_acceptance            run every criterion
//   safeshield_acceptance 3 5 7      run the listed criteria only

#include <chrono>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <iostream>
#include <set>
#include <string>

#include "oracles.hpp"

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0, ran = 0;
    for (const auto& c : safeshield::oracles::criteria()) {
        if (!only.empty() && !only.count(c.id)) continue;
        ++ran;
        const auto start = std::chrono::steady_clock::now();
        safeshield::oracles::Outcome o;
        try {
            o = c.run(&std::cerr);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << std::setw(2) << c.id << "] " << c.name << " -- "
                  << o.detail << " (" << std::fixed << std::setprecision(1) << secs << " s)" << std::defaultfloat
                  << std::endl;
    }
    std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
    return failed == 0 && ran > 0 ? 0 : 1;
}
