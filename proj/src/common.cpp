#include "pathryoshka/common.hpp"

namespace pathryoshka {

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::EmptyDataset: return "EmptyDataset";
        case Errc::InsufficientTiles: return "InsufficientTiles";
        case Errc::InvalidSize: return "InvalidSize";
        case Errc::InvalidCrop: return "InvalidCrop";
        case Errc::ConfigError: return "ConfigError";
        case Errc::ShapeError: return "ShapeError";
        case Errc::KeyError: return "KeyError";
        case Errc::TeacherUnavailable: return "TeacherUnavailable";
        case Errc::InvalidK: return "InvalidK";
        case Errc::InvalidDim: return "InvalidDim";
        case Errc::DegenerateLabels: return "DegenerateLabels";
        case Errc::MissingEMA: return "MissingEMA";
        case Errc::MissingHeads: return "MissingHeads";
        case Errc::NonFiniteLoss: return "NonFiniteLoss";
        case Errc::IoError: return "IoError";
    }
    return "UnknownError";
}

}  // namespace pathryoshka
