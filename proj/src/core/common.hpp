#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nnc {

using VecView = std::span<const double>;
using MutVecView = std::span<double>;

// Error kinds map onto the CLI exit-code contract: config -> 2, data -> 3,
// numeric -> 4. Usage errors are caller bugs surfaced at the API boundary.
enum class ErrorKind { Config, Data, Format, Numeric, Usage };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};
struct DataError : Error {
    explicit DataError(const std::string& m) : Error(ErrorKind::Data, m) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error(ErrorKind::Format, m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error(ErrorKind::Numeric, m) {}
};
struct UsageError : Error {
    explicit UsageError(const std::string& m) : Error(ErrorKind::Usage, m) {}
};

int exit_code_for(ErrorKind kind);

enum class Norm { L1, L2, Linf };

std::string norm_name(Norm p);       // "l1" / "l2" / "linf"
Norm parse_norm(const std::string&); // accepts l1/l2/linf/1/2/inf

// Number of worker threads: min(hardware, NNCERTIFY_THREADS when set).
int worker_count();

// Runs fn(i) for i in [0, n). Work is chunked across workers; fn must not
// touch shared mutable state except through its own index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

double l2_norm(VecView v);
double linf_norm(VecView v);
double l1_norm(VecView v);
double l2_dist(VecView a, VecView b);
double dot(VecView a, VecView b);

std::string format_double(double v);            // shortest round-trip text
std::string format_percent(double frac);        // "12.34" (two decimals, percent)

// Writes content to path atomically (temp file + rename).
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace nnc
