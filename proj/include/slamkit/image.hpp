#pragma once

// Minimal image container. Pixel memory is a shared, 64-byte aligned buffer;
// copies and region views share it.

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "slamkit/error.hpp"

namespace slamkit {

enum class ElementType : std::uint8_t { kU8, kF32 };

inline std::size_t element_size(ElementType t) { return t == ElementType::kU8 ? 1 : 4; }

class Image {
 public:
  static constexpr std::size_t kAlignment = 64;

  Image() = default;

  /// Allocates a zero-filled image. `stride` 0 means tightly packed rows.
  Image(int width, int height, int channels, ElementType type, std::size_t stride = 0)
      : width_(width), height_(height), channels_(channels), type_(type) {
    validate_shape();
    stride_ = stride ? stride : row_bytes();
    validate_stride();
    const std::size_t bytes = stride_ * static_cast<std::size_t>(height_);
    auto* raw = static_cast<std::uint8_t*>(::operator new(bytes ? bytes : 1, std::align_val_t(kAlignment)));
    std::memset(raw, 0, bytes);
    buffer_ = std::shared_ptr<std::uint8_t>(raw, [](std::uint8_t* p) { ::operator delete(p, std::align_val_t(kAlignment)); });
    data_ = raw;
  }

  /// Wraps external memory kept alive by `owner`.
  static Image wrap(std::shared_ptr<void> owner, void* data, int width, int height, int channels, ElementType type,
                    std::size_t stride = 0) {
    Image img;
    img.width_ = width;
    img.height_ = height;
    img.channels_ = channels;
    img.type_ = type;
    img.validate_shape();
    img.stride_ = stride ? stride : img.row_bytes();
    img.validate_stride();
    img.buffer_ = std::shared_ptr<std::uint8_t>(std::move(owner), static_cast<std::uint8_t*>(data));
    img.data_ = static_cast<std::uint8_t*>(data);
    return img;
  }

  bool empty() const { return data_ == nullptr; }
  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  ElementType type() const { return type_; }
  std::size_t elem_size() const { return element_size(type_); }
  std::size_t stride() const { return stride_; }
  std::size_t row_bytes() const {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(channels_) * elem_size();
  }
  /// Number of handles sharing the pixel buffer.
  long use_count() const { return buffer_.use_count(); }

  std::uint8_t* data() { return data_; }
  const std::uint8_t* data() const { return data_; }

  template <typename T>
  T* row(int y) {
    return reinterpret_cast<T*>(data_ + static_cast<std::size_t>(y) * stride_);
  }
  template <typename T>
  const T* row(int y) const {
    return reinterpret_cast<const T*>(data_ + static_cast<std::size_t>(y) * stride_);
  }

  template <typename T>
  T& at(int x, int y, int c = 0) {
    return row<T>(y)[x * channels_ + c];
  }
  template <typename T>
  const T& at(int x, int y, int c = 0) const {
    return row<T>(y)[x * channels_ + c];
  }

  /// View of a rectangle sharing this buffer.
  Image roi(int x, int y, int w, int h) const {
    if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > width_ || y + h > height_)
      throw InvalidArgument("image region out of bounds");
    Image v = *this;
    v.width_ = w;
    v.height_ = h;
    v.data_ = data_ + static_cast<std::size_t>(y) * stride_ + static_cast<std::size_t>(x) * channels_ * elem_size();
    return v;
  }

  /// Deep copy with packed rows.
  Image clone() const {
    if (empty()) return {};
    Image out(width_, height_, channels_, type_);
    for (int y = 0; y < height_; ++y) std::memcpy(out.row<std::uint8_t>(y), row<std::uint8_t>(y), row_bytes());
    return out;
  }

 private:
  void validate_shape() const {
    if (width_ <= 0 || height_ <= 0) throw InvalidArgument("image size must be positive");
    if (channels_ != 1 && channels_ != 3 && channels_ != 4) throw InvalidArgument("image channels must be 1, 3 or 4");
  }
  void validate_stride() const {
    if (stride_ < row_bytes())
      throw InvalidArgument("image stride " + std::to_string(stride_) + " is below row size " +
                            std::to_string(row_bytes()));
  }

  int width_ = 0, height_ = 0, channels_ = 1;
  ElementType type_ = ElementType::kU8;
  std::size_t stride_ = 0;
  std::shared_ptr<std::uint8_t> buffer_;
  std::uint8_t* data_ = nullptr;
};

}  // namespace slamkit
