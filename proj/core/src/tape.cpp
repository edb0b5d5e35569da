#include "mvsr/nn/tape.hpp"

namespace mvsr::nn {

template class TapeT<float>;
template class TapeT<double>;

}  // namespace mvsr::nn
