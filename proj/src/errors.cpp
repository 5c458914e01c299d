#include "miv/errors.hpp"

namespace miv {

const char* errc_name(errc code) {
    switch (code) {
        case errc::io_error: return "IoError";
        case errc::schema_error: return "SchemaError";
        case errc::invalid_spec: return "InvalidSpec";
        case errc::empty_cell: return "EmptyCell";
        case errc::non_finite_input: return "NonFiniteInput";
        case errc::zero_kernel_mass: return "ZeroKernelMass";
        case errc::bad_bandwidth: return "BadBandwidth";
        case errc::degenerate_x: return "DegenerateX";
        case errc::eigenvalues_not_distinct: return "EigenvaluesNotDistinct";
        case errc::complex_eigenvalues: return "ComplexEigenvalues";
        case errc::singular_q: return "SingularQ";
        case errc::labeling_ambiguous: return "LabelingAmbiguous";
        case errc::invalid_probability: return "InvalidProbability";
        case errc::degenerate_eigenvector: return "DegenerateEigenvector";
        case errc::too_few_distinct_values: return "TooFewDistinctValues";
        case errc::partition_mismatch: return "PartitionMismatch";
        case errc::no_dominant_labeling: return "NoDominantLabeling";
        case errc::irrelevant_instrument_at_u: return "IrrelevantInstrumentAtU";
        case errc::cross_check_failed: return "CrossCheckFailed";
        case errc::singular_iv_matrix: return "SingularIVMatrix";
        case errc::initialization_failed: return "InitializationFailed";
        case errc::no_convergence: return "NoConvergence";
        case errc::singular_f: return "SingularF";
        case errc::zero_denominator: return "ZeroDenominator";
        case errc::degenerate_treatment_mass: return "DegenerateTreatmentMass";
    }
    return "UnknownError";
}

bool errc_is_math(errc code) {
    switch (code) {
        case errc::io_error:
        case errc::schema_error:
        case errc::invalid_spec:
            return false;
        default:
            return true;
    }
}

}  // namespace miv
