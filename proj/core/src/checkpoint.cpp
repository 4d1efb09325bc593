#include "hvfi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hvfi {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order, which must be little-endian");

namespace {

constexpr char kMagic[4] = {'H', 'V', 'F', 'I'};

std::string shape_token(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w);
}

Shape parse_shape(const std::string& token) {
  Shape s;
  char x1 = 0, x2 = 0, x3 = 0;
  std::istringstream is(token);
  if (!(is >> s.n >> x1 >> s.c >> x2 >> s.h >> x3 >> s.w) || x1 != 'x' || x2 != 'x' ||
      x3 != 'x' || s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
    throw CheckpointFormatError("checkpoint: bad shape '" + token + "'");
  }
  return s;
}

NamedTensor named(const std::string& name, const Shape& shape, const float* data) {
  NamedTensor t{name, shape, {}};
  t.values.assign(data, data + shape.numel());
  return t;
}

void write_section(std::ostream& os, const std::string& first_line,
                   const std::vector<const NamedTensor*>& tensors) {
  std::string header = first_line + "\n";
  for (const NamedTensor* t : tensors) {
    header += "tensor " + t->name + " f32 " + shape_token(t->shape) + "\n";
  }
  const auto length = static_cast<std::uint64_t>(header.size());
  os.write(reinterpret_cast<const char*>(&length), sizeof length);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const NamedTensor* t : tensors) {
    os.write(reinterpret_cast<const char*>(t->values.data()),
             static_cast<std::streamsize>(t->values.size() * sizeof(float)));
  }
}

class Reader {
 public:
  Reader(std::istream& is, std::uint64_t size) : is_(is), remaining_(size) {}

  void read(void* dst, std::uint64_t bytes, const char* what) {
    if (bytes > remaining_) {
      throw CheckpointTruncatedError(std::string("checkpoint: truncated while reading ") + what);
    }
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (static_cast<std::uint64_t>(is_.gcount()) != bytes) {
      throw CheckpointTruncatedError(std::string("checkpoint: truncated while reading ") + what);
    }
    remaining_ -= bytes;
  }

  bool at_end() const { return remaining_ == 0; }

  // Reads a section header; returns its first line and fills `tensors` with
  // the listed tensors' values.
  std::string section(std::vector<NamedTensor>& tensors, const char* what) {
    std::uint64_t length = 0;
    read(&length, sizeof length, what);
    std::string header(length, '\0');
    read(header.data(), length, what);
    std::istringstream lines(header);
    std::string first;
    std::getline(lines, first);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::string tag, name, dtype, shape;
      if (!(row >> tag >> name >> dtype >> shape) || tag != "tensor") {
        throw CheckpointFormatError("checkpoint: bad header line '" + line + "'");
      }
      if (dtype != "f32") throw CheckpointFormatError("checkpoint: unsupported dtype " + dtype);
      tensors.push_back(NamedTensor{name, parse_shape(shape), {}});
    }
    for (NamedTensor& t : tensors) {
      const auto count = static_cast<std::uint64_t>(t.shape.numel());
      if (count * sizeof(float) > remaining_) {
        throw CheckpointTruncatedError("checkpoint: truncated payload of tensor '" + t.name + "'");
      }
      t.values.resize(count);
      read(t.values.data(), count * sizeof(float), "tensor payload");
    }
    return first;
  }

 private:
  std::istream& is_;
  std::uint64_t remaining_;
};

std::string value_after(const std::string& line, const std::string& prefix) {
  if (line.rfind(prefix, 0) != 0) {
    throw CheckpointFormatError("checkpoint: expected '" + prefix + "', got '" + line + "'");
  }
  return line.substr(prefix.size());
}

void copy_into(const NamedTensor& src, std::span<float> dst) {
  if (src.values.size() != dst.size()) {
    throw CheckpointShapeError("checkpoint: tensor '" + src.name + "' holds " +
                               std::to_string(src.values.size()) + " values, expected " +
                               std::to_string(dst.size()));
  }
  std::copy(src.values.begin(), src.values.end(), dst.begin());
}

}  // namespace

Checkpoint capture_checkpoint(const Model<float>& model, const AdamW<float>* optimizer) {
  Checkpoint ck;
  ck.model = model.config();
  const auto& entries = model.params().entries();
  for (const auto& e : entries) {
    ck.params.push_back(named(e.name, e.value.shape(), e.value.data().data()));
  }
  if (optimizer) {
    ck.has_optimizer = true;
    ck.steps = optimizer->steps();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const Shape s = entries[k].value.shape();
      ck.first_moments.push_back(named(entries[k].name + ".m", s, optimizer->first_moments()[k].data()));
      ck.second_moments.push_back(named(entries[k].name + ".v", s, optimizer->second_moments()[k].data()));
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot write " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    const std::uint32_t version = Checkpoint::kVersion;
    os.write(reinterpret_cast<const char*>(&version), sizeof version);

    std::vector<const NamedTensor*> params;
    for (const auto& t : ck.params) params.push_back(&t);
    write_section(os, "config " + ck.model.str(), params);

    std::vector<const NamedTensor*> state;
    if (ck.has_optimizer) {
      for (std::size_t k = 0; k < ck.first_moments.size(); ++k) {
        state.push_back(&ck.first_moments[k]);
        state.push_back(&ck.second_moments[k]);
      }
    }
    write_section(os, ck.has_optimizer ? "optimizer adamw steps=" + std::to_string(ck.steps)
                                       : std::string("optimizer none"),
                  state);
    os.flush();
    if (!os) throw CheckpointError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  Reader in(is, std::filesystem::file_size(path));

  char magic[4];
  in.read(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointFormatError("checkpoint: " + path.string() + " does not start with HVFI");
  }
  std::uint32_t version = 0;
  in.read(&version, sizeof version, "version");
  if (version != Checkpoint::kVersion) {
    throw CheckpointVersionError("checkpoint: version " + std::to_string(version) +
                                 ", this build reads version " +
                                 std::to_string(Checkpoint::kVersion));
  }

  Checkpoint ck;
  const std::string config = in.section(ck.params, "parameter section");
  try {
    ck.model = ModelConfig::parse(value_after(config, "config "));
  } catch (const std::invalid_argument& e) {
    throw CheckpointFormatError(std::string("checkpoint: bad model config: ") + e.what());
  }

  std::vector<NamedTensor> state;
  const std::string opt = in.section(state, "optimizer section");
  if (opt == "optimizer none") {
    if (!state.empty()) throw CheckpointFormatError("checkpoint: stray optimizer tensors");
  } else {
    ck.has_optimizer = true;
    try {
      ck.steps = std::stoll(value_after(opt, "optimizer adamw steps="));
    } catch (const std::logic_error&) {
      throw CheckpointFormatError("checkpoint: bad optimizer header '" + opt + "'");
    }
    if (state.size() != 2 * ck.params.size()) {
      throw CheckpointFormatError("checkpoint: optimizer state lists " +
                                  std::to_string(state.size()) + " tensors for " +
                                  std::to_string(ck.params.size()) + " parameters");
    }
    for (std::size_t k = 0; k < state.size(); k += 2) {
      ck.first_moments.push_back(std::move(state[k]));
      ck.second_moments.push_back(std::move(state[k + 1]));
    }
  }
  if (!in.at_end()) throw CheckpointFormatError("checkpoint: trailing bytes after optimizer state");
  return ck;
}

void restore_checkpoint(const Checkpoint& ck, Model<float>& model, AdamW<float>* optimizer) {
  const auto& entries = model.params().entries();
  // Check everything before writing anything.
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    if (k >= ck.params.size() || ck.params[k].name != e.name) {
      throw CheckpointShapeError("checkpoint: model tensor '" + e.name + "' " +
                                 e.value.shape().str() + " is missing from the checkpoint" +
                                 (k < ck.params.size() ? " (found '" + ck.params[k].name + "')"
                                                       : std::string()));
    }
    if (ck.params[k].shape != e.value.shape()) {
      throw CheckpointShapeError("checkpoint: tensor '" + e.name + "' has shape " +
                                 ck.params[k].shape.str() + ", model expects " +
                                 e.value.shape().str());
    }
  }
  if (ck.params.size() > entries.size()) {
    throw CheckpointShapeError("checkpoint: tensor '" + ck.params[entries.size()].name +
                               "' has no counterpart in the model");
  }
  const bool with_state = optimizer && ck.has_optimizer;
  if (with_state) {
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto count = static_cast<std::size_t>(entries[k].value.numel());
      if (ck.first_moments[k].values.size() != count || ck.second_moments[k].values.size() != count) {
        throw CheckpointShapeError("checkpoint: optimizer state of '" + entries[k].name +
                                   "' does not match its parameter");
      }
    }
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor<float> p = entries[k].value;
    copy_into(ck.params[k], p.mutable_data());
  }
  if (with_state) {
    for (std::size_t k = 0; k < entries.size(); ++k) {
      copy_into(ck.first_moments[k], optimizer->first_moments()[k]);
      copy_into(ck.second_moments[k], optimizer->second_moments()[k]);
    }
    optimizer->set_steps(ck.steps);
  }
}

Model<float> load_model(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  Model<float> model(ck.model);
  restore_checkpoint(ck, model);
  return model;
}

}  // namespace hvfi
