#pragma once

// Minimal test harness: each test binary is a plain main() that records
// named checks and exits nonzero if any failed.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>

namespace testing {

inline int passed = 0;
inline int failed = 0;

inline void record(bool ok, const std::string& name, const std::string& detail = "") {
    if (ok) {
        ++passed;
        std::cout << "[PASS] " << name << "\n";
    } else {
        ++failed;
        std::cout << "[FAIL] " << name;
        if (!detail.empty()) std::cout << "  (" << detail << ")";
        std::cout << "\n";
    }
}

inline void check(bool ok, const std::string& name) { record(ok, name); }

inline void check_close(double got, double want, double tol, const std::string& name) {
    const double err = std::abs(got - want);
    record(err <= tol, name,
           "got " + std::to_string(got) + ", want " + std::to_string(want) + ", |err| " +
               std::to_string(err) + " > tol " + std::to_string(tol));
}

inline void check_le(double value, double bound, const std::string& name) {
    record(value <= bound, name,
           "value " + std::to_string(value) + " exceeds bound " + std::to_string(bound));
}

template <typename Fn>
inline void check_throws(Fn&& fn, const std::string& name) {
    bool threw = false;
    try {
        fn();
    } catch (const std::exception&) {
        threw = true;
    }
    record(threw, name, "expected an exception");
}

inline int summary(const char* suite) {
    std::cout << suite << ": " << passed << " passed, " << failed << " failed\n";
    return failed == 0 ? 0 : 1;
}

}  // namespace testing
