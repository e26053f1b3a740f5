#include "gp/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace gp {

void save_checkpoint(const std::string& prefix,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  nlohmann::json sidecar;
  sidecar["format"] = "gp-checkpoint-v1";
  sidecar["tensors"] = nlohmann::json::array();
  std::ofstream bin(prefix + ".bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".bin");
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    sidecar["tensors"].push_back(
        {{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"offset", offset}});
    bin.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
    offset += t.size();
  }
  sidecar["total_elements"] = offset;
  bin.close();
  if (!bin) throw std::runtime_error("save_checkpoint: write failed for " + prefix + ".bin");
  std::ofstream js(prefix + ".json", std::ios::trunc);
  if (!js) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".json");
  js << sidecar.dump(2) << "\n";
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& prefix) {
  std::ifstream js(prefix + ".json");
  if (!js) throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".json");
  nlohmann::json sidecar;
  js >> sidecar;
  if (sidecar.value("format", "") != "gp-checkpoint-v1") {
    throw std::runtime_error("load_checkpoint: unrecognized format in " + prefix + ".json");
  }
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".bin");
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& entry : sidecar.at("tensors")) {
    const std::string name = entry.at("name");
    const std::size_t rows = entry.at("rows");
    const std::size_t cols = entry.at("cols");
    const std::uint64_t offset = entry.at("offset");
    Tensor t = Tensor::zeros(rows, cols);
    bin.seekg(static_cast<std::streamoff>(offset * sizeof(double)));
    bin.read(reinterpret_cast<char*>(t.values().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!bin) throw std::runtime_error("load_checkpoint: truncated read for tensor " + name);
    out.emplace_back(name, std::move(t));
  }
  return out;
}

}  // namespace gp
