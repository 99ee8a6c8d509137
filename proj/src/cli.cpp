#include "ptmm/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <regex>
#include <sstream>
#include <utility>

#include "ptmm/imaging.hpp"

namespace ptmm {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

// Numeric fields of one CSV line; nullopt when any field is not a number.
std::optional<std::vector<double>> parse_csv_line(std::string_view line) {
  std::vector<double> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    const std::string field =
        trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) return std::nullopt;
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

Matrix parse_csv_matrix(std::string_view text) {
  std::vector<std::vector<double>> rows;
  std::size_t pos = 0;
  int line_no = 0;
  bool first_content = true;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    auto values = parse_csv_line(line);
    if (!values) {
      if (first_content) {
        first_content = false;
        continue;  // header
      }
      throw ParseError("csv line " + std::to_string(line_no) + ": non-numeric field");
    }
    first_content = false;
    if (!rows.empty() && values->size() != rows.front().size()) {
      throw ParseError("csv line " + std::to_string(line_no) + ": expected " +
                       std::to_string(rows.front().size()) + " fields, found " +
                       std::to_string(values->size()));
    }
    rows.push_back(std::move(*values));
  }
  if (rows.empty()) throw ParseError("csv: no data rows");
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      out(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    }
  }
  return out;
}

Matrix read_csv_matrix(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_csv_matrix(buffer.str());
}

void write_text_atomic(const fs::path& path, std::string_view content) {
  const fs::path tmp = path.parent_path() / ("." + path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw UsageError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

namespace {

void write_image_atomic(const fs::path& path, const Image& image) {
  const fs::path tmp =
      path.parent_path() / ("." + path.stem().string() + ".tmp" + path.extension().string());
  write_image(tmp, image);
  fs::rename(tmp, path);
}

struct Options {
  std::string input;
  std::string output_dir = ".";
  std::vector<std::string> structures{"cuu"};
  std::vector<std::string> families{"t"};
  std::vector<std::string> df_modes{"common"};
  int g = 1;
  int q = 1;
  std::string block = "4x4";
  std::uint64_t seed = 0;
  int starts = 5;
  int max_iter = 1000;
  double epsilon = 1e-5;
  std::vector<int> grid_g{1, 2, 3};
  std::vector<int> grid_q{1, 2};
  int pca_k = 5;
};

std::pair<int, int> parse_block(const std::string& text) {
  static const std::regex pattern(R"((\d+)[xX](\d+))");
  std::smatch m;
  if (!std::regex_match(text, m, pattern)) {
    throw UsageError("--block: expected WxH, got '" + text + "'");
  }
  const int w = std::stoi(m[1]);
  const int h = std::stoi(m[2]);
  if (w <= 0 || h <= 0) throw UsageError("--block: dimensions must be positive");
  return {w, h};
}

FitOptions fit_options(const Options& o) {
  FitOptions f;
  f.max_iterations = o.max_iter;
  f.epsilon = o.epsilon;
  f.n_starts = o.starts;
  f.seed = o.seed;
  f.check();
  return f;
}

std::string single(const std::vector<std::string>& values, const char* flag) {
  if (values.size() != 1) throw UsageError(std::string(flag) + " takes exactly one value here");
  return values.front();
}

ModelSpec single_spec(const Options& o, int p) {
  ModelSpec spec;
  spec.structure = parse_structure(single(o.structures, "--structure"));
  spec.family = parse_family(single(o.families, "--family"));
  spec.df_mode = parse_df_mode(single(o.df_modes, "--df-mode"));
  spec.g = o.g;
  spec.q = o.q;
  spec.p = p;
  spec.check();
  return spec;
}

bool is_image_path(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".pgm" || ext == ".ppm";
}

Matrix load_data(const Options& o) {
  const fs::path path(o.input);
  if (!fs::exists(path)) throw UsageError("input '" + o.input + "' does not exist");
  if (is_image_path(path)) {
    const auto [bw, bh] = parse_block(o.block);
    return extract_blocks(read_image(path), bw, bh).vectors;
  }
  return read_csv_matrix(path);
}

fs::path output_dir(const Options& o) {
  const fs::path dir(o.output_dir);
  fs::create_directories(dir);
  return dir;
}

json spec_json(const ModelSpec& s) {
  return {{"structure", std::string(to_string(s.structure))},
          {"family", std::string(to_string(s.family))},
          {"df_mode", std::string(to_string(s.df_mode))},
          {"g", s.g},
          {"q", s.q},
          {"p", s.p}};
}

std::string number_text(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

int cmd_fit(const Options& o, std::ostream& out) {
  const Matrix data = load_data(o);
  const ModelSpec spec = single_spec(o, static_cast<int>(data.cols()));
  const FitResult fit = aecm_fit(data, spec, fit_options(o));
  const fs::path dir = output_dir(o);
  write_text_atomic(dir / "model.json", serialize(fit.model, fit.report));
  write_text_atomic(dir / "fit_report.json", report_to_json(fit.report));
  out << spec.label() << " loglik=" << number_text(fit.report.final_loglik)
      << " BIC=" << number_text(fit.report.bic) << " iterations=" << fit.report.iterations << "\n";
  return 0;
}

int cmd_compress(const Options& o, std::ostream& out) {
  const fs::path input(o.input);
  if (!fs::exists(input)) throw UsageError("input '" + o.input + "' does not exist");
  const auto [bw, bh] = parse_block(o.block);
  const Image image = read_image(input);
  const ModelSpec spec = single_spec(o, bw * bh * image.channels);
  const FitOptions options = fit_options(o);
  const CompressionResult result = compress_image(image, spec, options, bw, bh);

  const fs::path dir = output_dir(o);
  const std::string ext = image.channels == 3 || image.channels == 1 ? ".png" : ".ppm";
  write_image_atomic(dir / ("reconstructed" + ext), result.reconstructed);
  write_text_atomic(dir / "model.json", serialize(result.model, result.report));
  json quality = {{"rmse", result.quality.rmse},
                  {"per_channel_mse", result.quality.per_channel_mse},
                  {"model_file", "model.json"}};
  if (std::isinf(result.quality.psnr)) {
    quality["psnr"] = "inf";
  } else {
    quality["psnr"] = result.quality.psnr;
  }
  write_text_atomic(dir / "quality.json", quality.dump(2) + "\n");
  out << "RMSE=" << number_text(result.quality.rmse) << " PSNR=" << number_text(result.quality.psnr)
      << "\n";
  return 0;
}

std::string file_label(const std::string& column) {
  std::string s;
  for (char c : column) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      s.push_back(c);
    } else if (c == '(') {
      s.push_back('_');
    }
  }
  return s;
}

int cmd_faces(const Options& o, std::ostream& out) {
  const fs::path dir_in(o.input);
  if (!fs::is_directory(dir_in)) throw UsageError("input '" + o.input + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir_in)) {
    if (entry.is_regular_file() && is_image_path(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw UsageError("faces: need at least two images in '" + o.input + "'");
  std::vector<Image> images;
  for (const auto& f : files) {
    images.push_back(read_image(f));
    const Image& first = images.front();
    const Image& im = images.back();
    if (im.width != first.width || im.height != first.height || im.channels != first.channels) {
      throw UsageError("faces: '" + f.filename().string() + "' is " + std::to_string(im.width) + "x" +
                       std::to_string(im.height) + ", expected " + std::to_string(first.width) + "x" +
                       std::to_string(first.height) + " like '" + files.front().filename().string() +
                       "'");
    }
  }

  FaceStudyConfig config;
  config.pca_k = o.pca_k;
  config.q = o.q;
  config.g_values = o.grid_g;
  config.structure = parse_structure(single(o.structures, "--structure"));
  config.families.clear();
  for (const auto& f : o.families) {
    const Family family = parse_family(f);
    if (family == Family::Gaussian) {
      config.families.emplace_back(family, DfMode::Common);
      continue;
    }
    for (const auto& m : o.df_modes) config.families.emplace_back(family, parse_df_mode(m));
  }
  config.options = fit_options(o);
  for (int g : config.g_values) {
    if (g < 1) throw UsageError("--grid-g: values must be >= 1");
  }
  if (config.q < 1 || config.q >= static_cast<int>(images.front().pixels.size())) {
    throw UsageError("-q: must satisfy 1 <= q < p");
  }

  const FaceStudy study = face_study(images, config);

  json table;
  table["width"] = study.width;
  table["height"] = study.height;
  table["channels"] = study.channels;
  json names = json::array();
  for (const auto& f : files) names.push_back(f.filename().string());
  table["images"] = names;
  table["columns"] = json::array();
  std::vector<std::pair<fs::path, Image>> pending;
  const fs::path dir = output_dir(o);
  for (const FaceColumn& col : study.columns) {
    json c = {{"name", col.name}, {"ok", col.ok}};
    if (!col.ok) {
      c["error"] = col.error;
      c["rmse"] = nullptr;
      out << col.name << " FAILED: " << col.error << "\n";
    } else {
      c["rmse"] = col.rmse;
      if (col.report) {
        c["loglik"] = col.report->final_loglik;
        c["m"] = col.report->m;
        c["bic"] = col.report->bic;
      }
      double mean = 0.0;
      for (double r : col.rmse) mean += r;
      out << col.name << " mean_rmse=" << number_text(mean / static_cast<double>(col.rmse.size()))
          << "\n";
      const fs::path sub = dir / "reconstructions" / file_label(col.name);
      for (std::size_t j = 0; j < files.size(); ++j) {
        Image im(study.width, study.height, study.channels);
        for (std::size_t k = 0; k < im.pixels.size(); ++k) {
          im.pixels[k] = 255.0 * col.reconstructions(static_cast<Index>(j), static_cast<Index>(k));
        }
        pending.emplace_back(sub / (files[j].stem().string() + ".png"), std::move(im));
      }
    }
    table["columns"].push_back(std::move(c));
  }
  for (const auto& [path, im] : pending) {
    fs::create_directories(path.parent_path());
    write_image_atomic(path, im);
  }
  write_text_atomic(dir / "faces.json", table.dump(2) + "\n");
  return 0;
}

int cmd_select(const Options& o, std::ostream& out) {
  const Matrix data = load_data(o);
  SearchGrid grid;
  grid.g_values = o.grid_g;
  grid.q_values = o.grid_q;
  grid.structures.clear();
  for (const auto& s : o.structures) {
    if (s == "all") {
      grid.structures.assign(kAllStructures.begin(), kAllStructures.end());
      break;
    }
    grid.structures.push_back(parse_structure(s));
  }
  grid.families.clear();
  for (const auto& f : o.families) grid.families.push_back(parse_family(f));
  grid.df_modes.clear();
  for (const auto& m : o.df_modes) grid.df_modes.push_back(parse_df_mode(m));
  const int p = static_cast<int>(data.cols());
  grid.check(p);
  const FitOptions options = fit_options(o);

  const SearchResult result = model_search(data, grid, options);
  json doc;
  doc["n"] = data.rows();
  doc["p"] = p;
  doc["ranked"] = json::array();
  for (const auto& e : result.ranked) {
    doc["ranked"].push_back({{"spec", spec_json(e.spec)},
                             {"label", e.spec.label()},
                             {"loglik", e.report.final_loglik},
                             {"m", e.report.m},
                             {"bic", e.report.bic},
                             {"iterations", e.report.iterations},
                             {"converged", e.report.converged}});
  }
  doc["failures"] = json::array();
  for (const auto& f : result.failures) {
    doc["failures"].push_back({{"spec", spec_json(f.spec)}, {"label", f.spec.label()}, {"reason", f.reason}});
  }
  write_text_atomic(output_dir(o) / "selection.json", doc.dump(2) + "\n");
  const SearchEntry& best = result.ranked.front();
  out << "best " << best.spec.label() << " BIC=" << number_text(best.report.bic) << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parsimonious t-mixture factor analyzers: fitting, image compression, faces"};
  app.name("ptmm");
  app.require_subcommand(1);
  Options o;

  auto add_model_flags = [&](CLI::App* sub, bool multi_structure) {
    sub->add_option("--input", o.input, "Input CSV matrix, image, or image directory")->required();
    sub->add_option("--output-dir", o.output_dir, "Directory for written artifacts")
        ->capture_default_str();
    auto* st = sub->add_option("--structure", o.structures,
                               multi_structure ? "Covariance structures (ccc..uuu, or all)"
                                               : "Covariance structure (ccc..uuu)");
    st->capture_default_str()->delimiter(',');
    sub->add_option("--family", o.families, "Family: gaussian or t")
        ->capture_default_str()
        ->delimiter(',');
    sub->add_option("--df-mode", o.df_modes, "Degrees of freedom: common or free")
        ->capture_default_str()
        ->delimiter(',');
    sub->add_option("-q", o.q, "Number of factors")->capture_default_str();
    sub->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    sub->add_option("--starts", o.starts, "Number of k-means starts")->capture_default_str();
    sub->add_option("--max-iter", o.max_iter, "Maximum AECM iterations")->capture_default_str();
    sub->add_option("--epsilon", o.epsilon, "Aitken stopping tolerance")->capture_default_str();
  };

  CLI::App* fit = app.add_subcommand("fit", "Fit one model to a CSV matrix or blocked image");
  add_model_flags(fit, false);
  fit->add_option("-g", o.g, "Number of components")->capture_default_str();
  fit->add_option("--block", o.block, "Block size WxH for image input")->capture_default_str();

  CLI::App* compress = app.add_subcommand("compress", "Compress an image by block mixture modelling");
  add_model_flags(compress, false);
  compress->add_option("-g", o.g, "Number of components")->capture_default_str();
  compress->add_option("--block", o.block, "Block size WxH")->capture_default_str();

  CLI::App* faces = app.add_subcommand("faces", "PCA and mixture reconstructions of an image directory");
  add_model_flags(faces, false);
  faces->add_option("-K", o.pca_k, "Number of PCA eigenvectors")->capture_default_str();
  faces->add_option("--grid-g", o.grid_g, "Component counts to fit")
      ->capture_default_str()
      ->delimiter(',');

  CLI::App* select = app.add_subcommand("select", "BIC model search over a grid");
  add_model_flags(select, true);
  select->add_option("--grid-g", o.grid_g, "Component counts")->capture_default_str()->delimiter(',');
  select->add_option("--grid-q", o.grid_q, "Factor counts")->capture_default_str()->delimiter(',');
  select->add_option("--block", o.block, "Block size WxH for image input")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  if (faces->parsed()) {
    // Face defaults: K = q = 5, Gaussian and common-df t families.
    if (faces->count("-q") == 0) o.q = 5;
    if (faces->count("--family") == 0) o.families = {"gaussian", "t"};
  }

  try {
    if (fit->parsed()) return cmd_fit(o, out);
    if (compress->parsed()) return cmd_compress(o, out);
    if (faces->parsed()) return cmd_faces(o, out);
    return cmd_select(o, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ptmm
