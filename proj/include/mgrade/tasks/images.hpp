#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mgrade/datasets.hpp"
#include "mgrade/errors.hpp"

namespace mgrade::images {

namespace detail {

inline std::uint32_t read_be32(std::istream& is, const std::string& path, std::size_t offset) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) {
    throw DataError("truncated file " + path + " at offset " + std::to_string(offset));
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

}  // namespace detail

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};

/// IDX image file: big-endian magic 0x00000803, count, rows, cols, u8 pixels.
inline IdxImages load_idx_images(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open IDX image file: " + path);
  const std::uint32_t magic = detail::read_be32(is, path, 0);
  if (magic != 0x00000803u) {
    throw DataError("bad IDX image magic in " + path + " at offset 0 (got " +
                    std::to_string(magic) + ", want 2051)");
  }
  IdxImages out;
  out.count = detail::read_be32(is, path, 4);
  out.rows = detail::read_be32(is, path, 8);
  out.cols = detail::read_be32(is, path, 12);
  out.pixels.resize(out.count * out.rows * out.cols);
  is.read(reinterpret_cast<char*>(out.pixels.data()),
          static_cast<std::streamsize>(out.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != out.pixels.size()) {
    throw DataError("truncated file " + path + " at offset " +
                    std::to_string(16 + is.gcount()));
  }
  return out;
}

/// IDX label file: big-endian magic 0x00000801, count, u8 labels.
inline std::vector<std::int32_t> load_idx_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open IDX label file: " + path);
  const std::uint32_t magic = detail::read_be32(is, path, 0);
  if (magic != 0x00000801u) {
    throw DataError("bad IDX label magic in " + path + " at offset 0 (got " +
                    std::to_string(magic) + ", want 2049)");
  }
  const std::uint32_t count = detail::read_be32(is, path, 4);
  std::vector<std::uint8_t> raw(count);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) {
    throw DataError("truncated file " + path + " at offset " + std::to_string(8 + is.gcount()));
  }
  return std::vector<std::int32_t>(raw.begin(), raw.end());
}

struct CifarBatch {
  std::vector<std::int32_t> labels;
  std::vector<std::uint8_t> pixels;  // n * 3072, channel-planar RGB
};

/// CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes.
inline CifarBatch load_cifar_batch(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open CIFAR batch: " + path);
  is.seekg(0, std::ios::end);
  const std::size_t bytes = static_cast<std::size_t>(is.tellg());
  is.seekg(0);
  constexpr std::size_t record = 1 + 3072;
  if (bytes == 0 || bytes % record != 0) {
    throw DataError("CIFAR batch " + path + " has " + std::to_string(bytes) +
                    " bytes, not a multiple of " + std::to_string(record));
  }
  CifarBatch out;
  const std::size_t n = bytes / record;
  out.labels.resize(n);
  out.pixels.resize(n * 3072);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char label;
    is.read(reinterpret_cast<char*>(&label), 1);
    is.read(reinterpret_cast<char*>(out.pixels.data() + i * 3072), 3072);
    if (!is) throw DataError("truncated file " + path + " at record " + std::to_string(i));
    if (label > 9) {
      throw DataError("CIFAR batch " + path + " has label " + std::to_string(label) +
                      " at record " + std::to_string(i));
    }
    out.labels[i] = label;
  }
  return out;
}

/// Scan-line sequence batch from u8 images: row-major flattening to
/// (n, rows*cols, 1) with intensities scaled into [0, 1].
template <typename T>
inline SequenceBatch<T> scanline_batch(const std::vector<std::uint8_t>& pixels,
                                       const std::vector<std::int32_t>& labels, std::size_t stride,
                                       const std::string& task) {
  const std::size_t n = labels.size();
  SequenceBatch<T> batch;
  batch.task = task;
  batch.inputs = Tensor<T>({n, stride, 1});
  for (std::size_t i = 0; i < n * stride; ++i) {
    batch.inputs[i] = static_cast<T>(pixels[i]) / T(255);
  }
  batch.seq_labels = labels;
  return batch;
}

/// Sequential MNIST: scan-line order, T = 784. The canonical train file is
/// split train/val; the t10k pair is the test set.
template <typename T>
inline SequenceDataset<T> load_smnist(const std::string& dir, double val_frac = 1.0 / 12.0) {
  namespace fs = std::filesystem;
  const IdxImages train_images = load_idx_images((fs::path(dir) / "train-images-idx3-ubyte").string());
  const std::vector<std::int32_t> train_labels =
      load_idx_labels((fs::path(dir) / "train-labels-idx1-ubyte").string());
  const IdxImages test_images = load_idx_images((fs::path(dir) / "t10k-images-idx3-ubyte").string());
  const std::vector<std::int32_t> test_labels =
      load_idx_labels((fs::path(dir) / "t10k-labels-idx1-ubyte").string());
  if (train_images.count != train_labels.size() || test_images.count != test_labels.size()) {
    throw DataError("sMNIST: image/label counts disagree in " + dir);
  }
  const std::size_t stride = train_images.rows * train_images.cols;

  SequenceDataset<T> ds;
  ds.meta = {{"task", "smnist"}, {"dir", dir}, {"sequence_length", stride}};
  const std::size_t n_val = static_cast<std::size_t>(val_frac * static_cast<double>(train_images.count));
  const std::size_t n_train = train_images.count - n_val;

  const SequenceBatch<T> full =
      scanline_batch<T>(train_images.pixels, train_labels, stride, "smnist");
  std::vector<std::size_t> head_rows(n_train), tail_rows(n_val);
  for (std::size_t i = 0; i < n_train; ++i) head_rows[i] = i;
  for (std::size_t i = 0; i < n_val; ++i) tail_rows[i] = n_train + i;
  ds.train = full.select(head_rows);
  ds.val = full.select(tail_rows);
  ds.test = scanline_batch<T>(test_images.pixels, test_labels, stride, "smnist");
  return ds;
}

/// Grayscale sequential CIFAR: luminance-weighted RGB, scan-line order,
/// T = 1024. The five train batches form the training set; the published
/// split sizes reuse the test batch for validation.
template <typename T>
inline SequenceDataset<T> load_gscifar(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::uint8_t> gray;
  std::vector<std::int32_t> labels;
  auto append_gray = [&](const CifarBatch& batch) {
    const std::size_t n = batch.labels.size();
    gray.reserve(gray.size() + n * 1024);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t* r = batch.pixels.data() + i * 3072;
      const std::uint8_t* g = r + 1024;
      const std::uint8_t* b = g + 1024;
      for (std::size_t px = 0; px < 1024; ++px) {
        const double lum = 0.299 * r[px] + 0.587 * g[px] + 0.114 * b[px];
        gray.push_back(static_cast<std::uint8_t>(lum + 0.5));
      }
    }
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
  };
  for (int i = 1; i <= 5; ++i) {
    append_gray(load_cifar_batch((fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string()));
  }
  SequenceDataset<T> ds;
  ds.meta = {{"task", "gscifar"}, {"dir", dir}, {"sequence_length", 1024}};
  ds.train = scanline_batch<T>(gray, labels, 1024, "gscifar");

  gray.clear();
  labels.clear();
  append_gray(load_cifar_batch((fs::path(dir) / "test_batch.bin").string()));
  ds.test = scanline_batch<T>(gray, labels, 1024, "gscifar");
  ds.val = ds.test;
  return ds;
}

}  // namespace mgrade::images
