#pragma once

#include <stdexcept>
#include <string>

namespace sepdual {

/// Base class for all solver errors.
struct SolverError : std::runtime_error {
    explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

#define SEPDUAL_DEFINE_ERROR(Name)                                            \
    struct Name : SolverError {                                               \
        explicit Name(const std::string& what) : SolverError(what) {}         \
    }

// measures
SEPDUAL_DEFINE_ERROR(EmptyMeasure);
SEPDUAL_DEFINE_ERROR(WeightSumMismatch);
SEPDUAL_DEFINE_ERROR(MeanMismatch);
SEPDUAL_DEFINE_ERROR(NonFiniteValue);

// lattice
SEPDUAL_DEFINE_ERROR(BudgetExceeded);

// payoffs
SEPDUAL_DEFINE_ERROR(UnboundedAbove);
SEPDUAL_DEFINE_ERROR(ArityMismatch);

// multistop
SEPDUAL_DEFINE_ERROR(UnsupportedPayoff);
SEPDUAL_DEFINE_ERROR(DegenerateIncrement);

// primal
SEPDUAL_DEFINE_ERROR(UnrepresentableAtom);
SEPDUAL_DEFINE_ERROR(Infeasible);
SEPDUAL_DEFINE_ERROR(IterationLimit);
SEPDUAL_DEFINE_ERROR(NegativeGap);

// oracles
SEPDUAL_DEFINE_ERROR(HorizonTooShort);
SEPDUAL_DEFINE_ERROR(AtomTooLarge);

// martransport
SEPDUAL_DEFINE_ERROR(NotRepresentable);
SEPDUAL_DEFINE_ERROR(CapRequired);

// cli
SEPDUAL_DEFINE_ERROR(ConfigInvalid);

#undef SEPDUAL_DEFINE_ERROR

}  // namespace sepdual
