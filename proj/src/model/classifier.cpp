#include <algorithm>
#include <map>

#include "birdast/error.hpp"
#include "birdast/model.hpp"

namespace birdast::model {

Tensor image_tensor(const dsp::SpectrogramImage& image) {
  return Tensor::from_values({image.pixels.rows, image.pixels.cols}, image.pixels.data);
}

std::vector<NamedTensor> snapshot(const Classifier& model) {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : model.parameters()) {
    Tensor copy = Tensor::from_values(t.shape(), {t.values().begin(), t.values().end()});
    out.push_back({name, copy});
  }
  return out;
}

void load_parameters(const Classifier& model, const std::vector<NamedTensor>& values) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : values) by_name[nt.name] = &nt.tensor;
  for (auto [name, param] : model.parameters()) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(Errc::Config, "weights lack tensor '" + name + "'");
    const Tensor& src = *it->second;
    if (src.shape() != param.shape()) {
      throw Error(Errc::Config, "tensor '" + name + "' is " + tensor::shape_string(src.shape()) +
                                    ", model expects " + tensor::shape_string(param.shape()));
    }
    std::copy(src.values().begin(), src.values().end(), param.mutable_values().begin());
  }
}

}  // namespace birdast::model
