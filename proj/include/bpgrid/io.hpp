#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bpgrid/core.hpp"
#include "bpgrid/grid.hpp"

#include "json.hpp"

namespace bpgrid {
namespace io {

namespace detail {

inline int pnm_token(std::istream& in) {
  // skips whitespace and '#' comments
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value;
  if (!(in >> value)) throw std::runtime_error("pgm: malformed header");
  return value;
}

}  // namespace detail

// P5 grayscale, 8-bit or 16-bit big-endian raster. Values are scaled to
// [0, 1] by maxval.
inline Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pgm: cannot open " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw std::runtime_error("pgm: not a P5 file: " + path);
  int w = detail::pnm_token(in);
  int h = detail::pnm_token(in);
  int maxval = detail::pnm_token(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw std::runtime_error("pgm: bad header in " + path);
  in.get();  // single whitespace before the raster

  Image img(h, w);
  if (maxval < 256) {
    std::vector<unsigned char> buf((size_t)w * h);
    in.read((char*)buf.data(), buf.size());
    if (!in) throw std::runtime_error("pgm: truncated raster in " + path);
    for (size_t i = 0; i < buf.size(); ++i) img.v[i] = buf[i] / (double)maxval;
  } else {
    std::vector<unsigned char> buf((size_t)w * h * 2);
    in.read((char*)buf.data(), buf.size());
    if (!in) throw std::runtime_error("pgm: truncated raster in " + path);
    for (size_t i = 0; i < img.v.size(); ++i) {
      int v = (buf[2 * i] << 8) | buf[2 * i + 1];  // big-endian
      img.v[i] = v / (double)maxval;
    }
  }
  return img;
}

// 8-bit P5 with one gray level per label.
inline void write_label_pgm(const std::string& path, const LabelMap& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm: cannot write " + path);
  out << "P5\n" << labels.width << " " << labels.height << "\n255\n";
  for (int32_t v : labels.v) {
    if (v < 0 || v > 255) throw std::runtime_error("pgm: label out of byte range");
    out.put((char)v);
  }
}

// 8-bit P5 from values in [0, 1].
inline void write_pgm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm: cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (double v : img.v) {
    int b = (int)std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    out.put((char)b);
  }
}

// Grayscale PFM, float32, scale -1.0 (little-endian), scanlines
// bottom-to-top.
inline void write_pfm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pfm: cannot write " + path);
  out << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
  for (int y = img.height - 1; y >= 0; --y)
    for (int x = 0; x < img.width; ++x) {
      float f = (float)img.at(y, x);
      out.write((const char*)&f, 4);
    }
}

inline Image read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pfm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "Pf") throw std::runtime_error("pfm: not a grayscale PFM: " + path);
  int w, h;
  double scale;
  in >> w >> h >> scale;
  if (!in || w <= 0 || h <= 0) throw std::runtime_error("pfm: bad header in " + path);
  if (scale > 0) throw std::runtime_error("pfm: big-endian files are not supported");
  in.get();
  Image img(h, w);
  std::vector<float> row(w);
  for (int y = h - 1; y >= 0; --y) {
    in.read((char*)row.data(), (size_t)w * 4);
    if (!in) throw std::runtime_error("pfm: truncated raster in " + path);
    for (int x = 0; x < w; ++x) img.at(y, x) = row[x];
  }
  return img;
}

// Probability volume as CSV: header "H,W,L", then H*W rows of L values in
// row-major pixel order. Rows that deviate from sum 1 by more than 1e-6 are
// renormalized with a warning on stderr.
inline Volume load_probability_volume(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("volume: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("volume: empty file " + path);
  int h, w, l;
  if (std::sscanf(line.c_str(), "%d,%d,%d", &h, &w, &l) != 3 || h < 1 || w < 1 || l < 1)
    throw std::runtime_error("volume: bad header in " + path);
  Volume q({h, w, l});
  int warned = 0;
  for (int p = 0; p < h * w; ++p) {
    if (!std::getline(in, line))
      throw std::runtime_error("volume: missing row " + std::to_string(p) + " in " + path);
    std::stringstream ss(line);
    double sum = 0.0;
    for (int s = 0; s < l; ++s) {
      std::string cell;
      if (!std::getline(ss, cell, ','))
        throw std::runtime_error("volume: row " + std::to_string(p) + " too short in " + path);
      q.v[(size_t)p * l + s] = std::stod(cell);
      sum += q.v[(size_t)p * l + s];
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      if (sum <= 0)
        throw std::runtime_error("volume: row " + std::to_string(p) + " has non-positive mass");
      if (warned++ == 0)
        std::cerr << "warning: renormalizing probability rows in " << path << "\n";
      for (int s = 0; s < l; ++s) q.v[(size_t)p * l + s] /= sum;
    }
  }
  return q;
}

inline void save_probability_volume(const std::string& path, const Volume& q) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("volume: cannot write " + path);
  out << q.shape.height << "," << q.shape.width << "," << q.shape.labels << "\n";
  out.precision(17);
  int L = q.shape.labels;
  for (int p = 0; p < q.shape.pixels(); ++p) {
    for (int s = 0; s < L; ++s) out << (s ? "," : "") << q.v[(size_t)p * L + s];
    out << "\n";
  }
}

// Parameter file: pairwise model, temperature and the optional edge-weight
// scale, with per-level jump penalties when training multiscale models.
struct ParamsFile {
  std::string pairwise = "jump";  // "jump" | "matrix"
  std::vector<JumpParams> jump_levels{JumpParams{}};
  CompatMatrix matrix;
  double temperature = 1.0;
  double weight_beta = -1.0;  // < 0: no per-pixel weights

  const JumpParams& jump_at(int level) const {
    return jump_levels[std::min((size_t)level, jump_levels.size() - 1)];
  }
};

inline ParamsFile load_params_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("params: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("params: invalid JSON in " + path + ": " + e.what());
  }
  ParamsFile p;
  p.pairwise = j.value("pairwise", "jump");
  p.temperature = j.value("temperature", 1.0);
  p.weight_beta = j.value("weight_beta", -1.0);
  if (p.pairwise == "jump") {
    p.jump_levels.clear();
    auto parse_jump = [](const nlohmann::json& node) {
      JumpParams jp;
      jp.p1_pos = node.value("p1_pos", 0.0);
      jp.p1_neg = node.value("p1_neg", 0.0);
      jp.p2_pos = node.value("p2_pos", 0.0);
      jp.p2_neg = node.value("p2_neg", 0.0);
      jp.p3 = node.value("p3", 0.0);
      return jp;
    };
    if (j.contains("jump_levels")) {
      for (const auto& node : j["jump_levels"]) p.jump_levels.push_back(parse_jump(node));
    } else if (j.contains("jump")) {
      p.jump_levels.push_back(parse_jump(j["jump"]));
    }
    if (p.jump_levels.empty()) p.jump_levels.push_back(JumpParams{});
  } else if (p.pairwise == "matrix") {
    if (!j.contains("matrix")) throw std::runtime_error("params: missing matrix in " + path);
    auto& m = j["matrix"];
    auto parse_mat = [&](const char* key, std::vector<double>& out, int& labels) {
      if (!m.contains(key)) throw std::runtime_error(std::string("params: missing ") + key);
      auto rows = m[key];
      labels = (int)rows.size();
      for (const auto& row : rows) {
        if ((int)row.size() != labels)
          throw std::runtime_error("params: matrix is not square in " + path);
        for (const auto& v : row) out.push_back((double)v);
      }
    };
    int lh = 0, lv = 0;
    std::vector<double> hm, vm;
    parse_mat("horizontal", hm, lh);
    parse_mat("vertical", vm, lv);
    if (lh != lv) throw std::runtime_error("params: horizontal/vertical label mismatch");
    p.matrix = CompatMatrix(lh);
    p.matrix.horizontal = std::move(hm);
    p.matrix.vertical = std::move(vm);
  } else {
    throw std::runtime_error("params: unknown pairwise kind '" + p.pairwise + "'");
  }
  return p;
}

inline void save_params_json(const std::string& path, const ParamsFile& p) {
  nlohmann::json j;
  j["pairwise"] = p.pairwise;
  j["temperature"] = p.temperature;
  if (p.weight_beta >= 0) j["weight_beta"] = p.weight_beta;
  if (p.pairwise == "jump") {
    nlohmann::json levels = nlohmann::json::array();
    for (const JumpParams& jp : p.jump_levels)
      levels.push_back({{"p1_pos", jp.p1_pos},
                        {"p1_neg", jp.p1_neg},
                        {"p2_pos", jp.p2_pos},
                        {"p2_neg", jp.p2_neg},
                        {"p3", jp.p3}});
    j["jump_levels"] = levels;
  } else {
    int L = p.matrix.labels;
    nlohmann::json hm = nlohmann::json::array(), vm = nlohmann::json::array();
    for (int s = 0; s < L; ++s) {
      nlohmann::json hrow = nlohmann::json::array(), vrow = nlohmann::json::array();
      for (int t = 0; t < L; ++t) {
        hrow.push_back(p.matrix.h(s, t));
        vrow.push_back(p.matrix.vert(s, t));
      }
      hm.push_back(hrow);
      vm.push_back(vrow);
    }
    j["matrix"] = {{"horizontal", hm}, {"vertical", vm}};
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("params: cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace io
}  // namespace bpgrid
