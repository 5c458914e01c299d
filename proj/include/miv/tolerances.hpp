#pragma once

namespace miv {

// Numerical guards used across identification and estimation.  Defaults are
// tuned for exact (population) inputs; estimation callers may loosen eig_gap
// and label when feeding noisy sample moments.
struct Tolerances {
    double max_cond = 1e8;   // condition-number ceiling for observable matrices
    double eig_gap = 1e-10;  // minimum separation between eigenvalues
    double label = 1e-10;    // minimum margin when ordering mixture components
    double prob = 1e-6;      // slack for clamping recovered probabilities
    double disc = 1e-12;     // discriminant cutoff before declaring complex roots
    double imag = 1e-8;      // relative imaginary-part cutoff (general eigensolver)
    double vec = 1e-12;      // relative floor for the leading eigenvector entry
    double rel_gap = 1e-10;  // instrument relevance floor for the 2x2 solve
    double cross = 1e-7;     // agreement required between the two instrument arms
};

}  // namespace miv
