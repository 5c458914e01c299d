#pragma once

#include <stdexcept>
#include <string>

namespace miv {

// Failure taxonomy shared by every module.  The split drives the process
// exit code of the CLI: input/schema problems exit 1, mathematical or
// statistical failures exit 2.
enum class errc {
    io_error,
    schema_error,
    invalid_spec,

    empty_cell,
    non_finite_input,
    zero_kernel_mass,
    bad_bandwidth,
    degenerate_x,
    eigenvalues_not_distinct,
    complex_eigenvalues,
    singular_q,
    labeling_ambiguous,
    invalid_probability,
    degenerate_eigenvector,
    too_few_distinct_values,
    partition_mismatch,
    no_dominant_labeling,
    irrelevant_instrument_at_u,
    cross_check_failed,
    singular_iv_matrix,
    initialization_failed,
    no_convergence,
    singular_f,
    zero_denominator,
    degenerate_treatment_mass,
};

const char* errc_name(errc code);

// true -> mathematical/statistical failure (exit code 2)
bool errc_is_math(errc code);

class error : public std::runtime_error {
public:
    error(errc code, const std::string& msg)
        : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

    errc code() const { return code_; }
    const char* name() const { return errc_name(code_); }

private:
    errc code_;
};

[[noreturn]] inline void raise(errc code, const std::string& msg) {
    throw error(code, msg);
}

}  // namespace miv
