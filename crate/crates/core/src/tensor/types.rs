use crate::error::{Error, Result};
use crate::real::Real;

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.width + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| v.f64()).sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Sub-image starting at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "crop {height}x{width}@({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(height, width, |r, c| self.get(top + r, left + c)))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c))
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(self.height - 1 - r, c))
    }

    /// Rotation by 90 degrees counter-clockwise.
    pub fn rot90(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.get(c, self.width - 1 - r))
    }

    /// Pads on the bottom and right by mirror reflection (edge sample not
    /// repeated) so both dimensions become multiples of `multiple`.
    pub fn reflect_pad_to_multiple(&self, multiple: usize) -> Self {
        let up = |n: usize| n.div_ceil(multiple) * multiple;
        let (h, w) = (up(self.height), up(self.width));
        if (h, w) == self.dims() {
            return self.clone();
        }
        Self::from_fn(h, w, |r, c| {
            self.get(reflect(r, self.height), reflect(c, self.width))
        })
    }
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let k = i % period;
    if k < n {
        k
    } else {
        period - k
    }
}

/// `channels` coefficient planes of size `height x width`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffMap<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> CoeffMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "empty coefficient map {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "coefficient map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "empty coefficient map");
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn plane(&self, j: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[j * n..(j + 1) * n]
    }

    #[inline]
    pub fn get(&self, j: usize, a: usize, b: usize) -> T {
        self.data[(j * self.height + a) * self.width + b]
    }

    #[inline]
    pub fn set(&mut self, j: usize, a: usize, b: usize, v: T) {
        self.data[(j * self.height + a) * self.width + b] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> CoeffMap<U> {
        CoeffMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Zero-fills by `stride` (the operator written Δ_s): every coefficient
    /// lands on the `(a*s, b*s)` site of a `height*s x width*s` grid.
    pub fn zero_fill(&self, stride: usize) -> Self {
        let (h, w) = (self.height * stride, self.width * stride);
        let mut out = Self::zeros(self.channels, h, w);
        for j in 0..self.channels {
            for a in 0..self.height {
                for b in 0..self.width {
                    out.set(j, a * stride, b * stride, self.get(j, a, b));
                }
            }
        }
        out
    }

    /// Keeps every `stride`-th site in both directions (the adjoint of
    /// [`CoeffMap::zero_fill`]).
    pub fn subsample(&self, stride: usize) -> Self {
        let (h, w) = (self.height.div_ceil(stride), self.width.div_ceil(stride));
        let mut out = Self::zeros(self.channels, h, w);
        for j in 0..self.channels {
            for a in 0..h {
                for b in 0..w {
                    out.set(j, a, b, self.get(j, a * stride, b * stride));
                }
            }
        }
        out
    }
}

/// `num_filters` square filters of side `filter_size` applied with `stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T> {
    num_filters: usize,
    filter_size: usize,
    stride: usize,
    weights: Vec<T>,
}

impl<T: Real> FilterBank<T> {
    pub fn new(num_filters: usize, filter_size: usize, stride: usize, weights: Vec<T>) -> Result<Self> {
        if num_filters == 0 || filter_size == 0 || stride == 0 {
            return Err(Error::contract(format!(
                "filter bank needs positive sizes (M={num_filters}, p={filter_size}, s={stride})"
            )));
        }
        if weights.len() != num_filters * filter_size * filter_size {
            return Err(Error::shape(format!(
                "filter bank {num_filters}x{filter_size}x{filter_size} needs {} weights, got {}",
                num_filters * filter_size * filter_size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::non_finite("filter weights", 0));
        }
        Ok(Self {
            num_filters,
            filter_size,
            stride,
            weights,
        })
    }

    pub fn zeros(num_filters: usize, filter_size: usize, stride: usize) -> Self {
        Self::new(
            num_filters,
            filter_size,
            stride,
            vec![T::zero(); num_filters * filter_size * filter_size],
        )
        .expect("positive sizes")
    }

    /// Bank whose filters are all the centred Kronecker delta.
    pub fn delta(num_filters: usize, filter_size: usize, stride: usize) -> Self {
        let mut bank = Self::zeros(num_filters, filter_size, stride);
        let c = (filter_size - 1) / 2;
        for j in 0..num_filters {
            bank.filter_mut(j)[c * filter_size + c] = T::one();
        }
        bank
    }

    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn filter_size(&self) -> usize {
        self.filter_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Anchor offset of the filter centre.
    pub fn center(&self) -> usize {
        (self.filter_size - 1) / 2
    }

    pub fn taps(&self) -> usize {
        self.filter_size * self.filter_size
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn filter(&self, j: usize) -> &[T] {
        let t = self.taps();
        &self.weights[j * t..(j + 1) * t]
    }

    pub fn filter_mut(&mut self, j: usize) -> &mut [T] {
        let t = self.taps();
        &mut self.weights[j * t..(j + 1) * t]
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.num_filters == other.num_filters
            && self.filter_size == other.filter_size
            && self.stride == other.stride
    }

    pub fn scaled(&self, factor: T) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= factor);
        out
    }

    pub fn cast<U: Real>(&self) -> FilterBank<U> {
        FilterBank {
            num_filters: self.num_filters,
            filter_size: self.filter_size,
            stride: self.stride,
            weights: self.weights.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}
