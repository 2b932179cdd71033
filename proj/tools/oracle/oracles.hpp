#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace safeshield::oracles {

struct Outcome {
    bool pass = false;
    std::string detail;
};

/// One acceptance criterion with its independent oracle.
struct Criterion {
    int id = 0;
    std::string name;
    bool slow = false;  // trains agents; minutes rather than seconds
    std::function<Outcome(std::ostream* log)> run;
};

const std::vector<Criterion>& criteria();

}  // namespace safeshield::oracles
