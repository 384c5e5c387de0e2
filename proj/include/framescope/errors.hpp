#pragma once

#include <stdexcept>
#include <string>

namespace framescope {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// -- rollout ---------------------------------------------------------------
struct StackShapeError : Error {
    using Error::Error;
};

struct DegenerateRowError : Error {
    DegenerateRowError(const std::string& what, int layer_index = -1, int row_index = -1)
        : Error(what), layer(layer_index), row(row_index) {}
    int layer;
    int row;
};

// -- metrics ---------------------------------------------------------------
struct EmptyQueryError : Error {
    using Error::Error;
};
struct GeometryError : Error {
    using Error::Error;
};
struct ZeroVisualMassError : Error {
    using Error::Error;
};
struct InsufficientSampleError : Error {
    using Error::Error;
};
struct DegenerateQuartileError : Error {
    using Error::Error;
};
struct GroupingError : Error {
    using Error::Error;
};

// -- reframe ---------------------------------------------------------------
struct TemplateError : Error {
    using Error::Error;
};
struct ReframeParseError : Error {
    using Error::Error;
};
struct FramingError : Error {
    using Error::Error;
};
struct EndpointError : Error {
    using Error::Error;
};

// -- consistency -----------------------------------------------------------
struct EmptyDenominatorError : Error {
    using Error::Error;
};

// -- tuner -----------------------------------------------------------------
struct AlignmentShapeError : Error {
    using Error::Error;
};
struct EmptyGoldError : Error {
    using Error::Error;
};
struct NumericalError : Error {
    using Error::Error;
};
struct ScheduleError : Error {
    using Error::Error;
};
struct EmptyDatasetError : Error {
    using Error::Error;
};

// -- harness ---------------------------------------------------------------
struct CapabilityError : Error {
    using Error::Error;
};
struct DumpFormatError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace framescope
